fn main() {
    std::process::exit(hessreach_cli::run(std::env::args_os()));
}
