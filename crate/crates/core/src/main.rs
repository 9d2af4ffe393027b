fn main() {
    std::process::exit(delaycast::cli::run_command(std::env::args_os()));
}
