fn main() {
    std::process::exit(dpsketch::cli::main_from(std::env::args_os()));
}
