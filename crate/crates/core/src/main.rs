fn main() {
    std::process::exit(levy_ot::cli::run(std::env::args_os()));
}
