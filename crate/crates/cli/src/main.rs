use clap::Parser;
use gsbench_cli::args::{Cli, Command};
use gsbench_cli::commands;
use gsbench_core::Error as CoreError;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(args) => commands::cmd_gen(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Bench(args) => commands::cmd_bench(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        let diverged = err
            .chain()
            .any(|c| matches!(c.downcast_ref::<CoreError>(), Some(CoreError::Diverged { .. })));
        std::process::exit(if diverged { 2 } else { 1 });
    }
}
