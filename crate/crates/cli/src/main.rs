fn main() {
    std::process::exit(dcmon::run(std::env::args_os()));
}
