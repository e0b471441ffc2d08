fn main() -> std::process::ExitCode {
    nupix::cli::main()
}
