use fl_guest_sdk::{entry, Value};

entry!(hello);

fn hello(args: Value) -> Result<Value, String> {
    let name = match args.get("name") {
        None => "world",
        Some(Value::String(s)) => s.as_str(),
        Some(_) => return Err("name must be a string".into()),
    };
    Ok(Value::from(format!("Hello {name}")))
}
