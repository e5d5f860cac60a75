fn main() {
    std::process::exit(mn_delta::harness::main_with_args(std::env::args_os()));
}
