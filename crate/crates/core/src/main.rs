fn main() {
    cofact::parallel::init_from_env();
    std::process::exit(cofact::cli::run(std::env::args_os()));
}
