fn main() {
    std::process::exit(fedproc_cli::cli_main(std::env::args()));
}
