fn main() {
    std::process::exit(scanfuse::cli::main_entry());
}
