use std::io;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = afl_sim::harness::cli::run(std::env::args_os(), &mut io::stdout());
    std::process::exit(code);
}
