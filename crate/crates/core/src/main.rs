fn main() {
    std::process::exit(sgdreg::cli::run(std::env::args_os()));
}
