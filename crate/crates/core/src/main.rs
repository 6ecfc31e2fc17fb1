fn main() {
    std::process::exit(meterread::cli::run(std::env::args_os()));
}
