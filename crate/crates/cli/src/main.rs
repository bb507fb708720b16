fn main() {
    std::process::exit(plab_cli::cli_main(std::env::args_os()));
}
