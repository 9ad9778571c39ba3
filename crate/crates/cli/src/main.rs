fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STORAGE_MARKET_LOG", "warn")).init();
    std::process::exit(storage_market_cli::run(std::env::args_os()));
}
