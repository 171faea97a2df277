fn main() {
    std::process::exit(pdrfe_lab::cli::run(std::env::args_os()));
}
