fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HSTORY_LOG", "warn")).init();
    std::process::exit(hstory::cli::main(std::env::args_os()));
}
