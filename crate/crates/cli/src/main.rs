fn main() {
    std::process::exit(nomctl::run(std::env::args_os()));
}
