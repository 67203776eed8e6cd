fn main() {
    std::process::exit(hessbell::cli::run(std::env::args_os()));
}
