use fl_guest_sdk::{entry, sleep_ms, Value};

entry!(sleep);

fn sleep(_args: Value) -> Result<Value, String> {
    sleep_ms(3000);
    Ok(Value::from("Slept for 3 seconds"))
}
