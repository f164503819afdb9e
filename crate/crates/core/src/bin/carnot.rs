fn main() -> std::process::ExitCode {
    carnot::cli::main()
}
