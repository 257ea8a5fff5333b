fn main() {
    std::process::exit(wgf_core::cli::cli_run(std::env::args_os()));
}
