fn main() -> std::process::ExitCode {
    fluidnet::cli::run()
}
