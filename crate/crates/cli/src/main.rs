fn main() {
    std::process::exit(subradius_cli::run_command(std::env::args_os()));
}
