fn main() {
    std::process::exit(igr_core::cli::dispatch(std::env::args_os()));
}
