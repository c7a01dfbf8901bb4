use fl_guest_sdk::{entry, json, Value};

entry!(matrix_mult);

fn parse(v: Option<&Value>, which: &str) -> Result<Vec<Vec<i64>>, String> {
    let rows = v.and_then(Value::as_array).ok_or(format!("{which} must be a matrix"))?;
    rows.iter()
        .map(|row| {
            row.as_array()
                .ok_or(format!("{which} rows must be arrays"))?
                .iter()
                .map(|x| x.as_i64().ok_or(format!("{which} entries must be integers")))
                .collect()
        })
        .collect()
}

fn matrix_mult(args: Value) -> Result<Value, String> {
    let a = parse(args.get("a"), "a")?;
    let b = parse(args.get("b"), "b")?;
    let n = a.len();
    if n == 0 || b.len() != n || a.iter().chain(&b).any(|row| row.len() != n) {
        return Err("a and b must be non-empty square matrices of equal size".into());
    }
    let mut out = vec![vec![0i64; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            for j in 0..n {
                let p = aik.checked_mul(b[k][j]).ok_or("overflow")?;
                out[i][j] = out[i][j].checked_add(p).ok_or("overflow")?;
            }
        }
    }
    Ok(json!(out))
}
