fn main() {
    fl_platform::init_logging();
    std::process::exit(fl_bench::cli::run(std::env::args_os()));
}
