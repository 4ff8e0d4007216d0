fn main() {
    std::process::exit(sspsc::cli::run(std::env::args_os()));
}
