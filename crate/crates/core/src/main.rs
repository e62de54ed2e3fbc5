fn main() -> std::process::ExitCode {
    quicfed::cli::main()
}
