fn main() {
    std::process::exit(forge::cli::dispatch(std::env::args_os()));
}
