use clap::Parser;

fn main() {
    let argv: Vec<std::ffi::OsString> = std::env::args_os().collect();
    let verbosity = mtlbench::cli::Cli::try_parse_from(&argv).map_or(0, |c| c.global.verbose);
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    std::process::exit(mtlbench::cli::run(argv));
}
