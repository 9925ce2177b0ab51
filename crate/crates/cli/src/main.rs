fn main() {
    std::process::exit(eventvad_cli::run(std::env::args_os()));
}
