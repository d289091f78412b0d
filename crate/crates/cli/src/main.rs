fn main() {
    std::process::exit(qlhyp_cli::run(std::env::args_os()));
}
