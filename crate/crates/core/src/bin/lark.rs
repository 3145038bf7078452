fn main() {
    std::process::exit(lark::cli::run(std::env::args_os()));
}
