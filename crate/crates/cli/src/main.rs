fn main() {
    std::process::exit(proper_speed_cli::run(std::env::args_os()));
}
