fn main() {
    std::process::exit(recbench::cli::main_from_env());
}
