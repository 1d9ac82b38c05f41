fn main() -> std::process::ExitCode {
    gma_uncertainty::cli::main_entry()
}
