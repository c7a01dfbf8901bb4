use fl_guest_sdk::{entry, http, json, Value};

entry!(server_reply);

fn server_reply(args: Value) -> Result<Value, String> {
    let url = args.get("target_url").and_then(Value::as_str).ok_or("target_url is required")?;
    let message = args.get("message").and_then(Value::as_str).unwrap_or("");
    let resp = http("POST", url, &[("content-type", "text/plain")], message.as_bytes(), 10_000)?;
    if resp.status_code != 200 {
        return Err(format!("server answered {}", resp.status_code));
    }
    let reply = String::from_utf8(resp.body).map_err(|_| "reply is not UTF-8".to_string())?;
    Ok(json!({ "reply": reply }))
}
