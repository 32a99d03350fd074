fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RTE_AOT_LOG", "warn")).init();
    std::process::exit(rte_aot::cli::main_with_args(std::env::args_os()));
}
