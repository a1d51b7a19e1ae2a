fn main() {
    std::process::exit(rpdml_cli::run(std::env::args_os()));
}
