fn main() {
    std::process::exit(ppmtf_cli::run(std::env::args_os()));
}
