use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let code = privspn::harness::main_with(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
