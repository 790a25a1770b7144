fn main() {
    std::process::exit(perpfund_cli::run(std::env::args_os()));
}
