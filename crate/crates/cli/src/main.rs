fn main() {
    std::process::exit(smd_cli::dispatch(std::env::args_os()));
}
