fn main() {
    std::process::exit(edgewipe_cli::run(std::env::args_os()));
}
