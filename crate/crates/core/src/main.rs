fn main() {
    bilinear_rhc::cli::init_logging();
    std::process::exit(bilinear_rhc::cli::run_from(std::env::args_os()));
}
