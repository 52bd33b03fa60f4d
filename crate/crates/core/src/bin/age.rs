fn main() {
    std::process::exit(age_core::cli::main_entry());
}
