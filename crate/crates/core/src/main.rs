fn main() {
    std::process::exit(plaidstream::cli::run(std::env::args_os()));
}
