fn main() -> std::process::ExitCode {
    avfe::cli::main()
}
