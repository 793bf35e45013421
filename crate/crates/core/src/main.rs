fn main() {
    std::process::exit(doppler_odom::cli::run(std::env::args_os()));
}
