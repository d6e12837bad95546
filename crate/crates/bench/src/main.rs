fn main() {
    std::process::exit(ecgid_bench::cli::cli_main(std::env::args_os()));
}
