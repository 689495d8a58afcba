fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RFDAE_LOG", "info"))
        .format_timestamp_secs()
        .init();
    std::process::exit(rfdae::cli::run(std::env::args_os()));
}
