fn main() -> std::process::ExitCode {
    tram::cli::main()
}
