use fl_guest_sdk::{entry, Value};

entry!(echo);

fn echo(args: Value) -> Result<Value, String> {
    Ok(args)
}
