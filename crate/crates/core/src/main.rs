fn main() -> std::process::ExitCode {
    geocaption::cli::main()
}
