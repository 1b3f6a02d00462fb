use std::io::{BufRead, Write};
use std::path::PathBuf;

use anyhow::{bail, Context};
use obk_core::model::{Role, User};
use obk_core::storage::{create_repository, export_canonical, BackendId};
use obk_service::{hash_password, is_valid_username, HashParams};

#[derive(clap::Subcommand)]
pub enum Command {
    /// Create an empty repository.
    Init {
        #[arg(long)]
        backend: BackendId,
        #[arg(long)]
        root: PathBuf,
    },
    /// Manage logbook accounts.
    #[command(subcommand)]
    User(UserCommand),
    /// Close a dangling open run as Bad.
    ForceClose {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        partition: String,
        #[arg(long)]
        run: u64,
    },
    /// Write the canonical export of a repository.
    Export {
        #[arg(long)]
        root: PathBuf,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
pub struct Password {
    /// The password; prefer --password-stdin.
    #[arg(long, env = "OBK_PASSWORD", hide_env_values = true, conflicts_with = "password_stdin")]
    password: Option<String>,
    /// Read the password from the first line of standard input.
    #[arg(long)]
    password_stdin: bool,
}

impl Password {
    fn read(&self) -> anyhow::Result<String> {
        let pw = if self.password_stdin {
            let mut line = String::new();
            std::io::stdin().lock().read_line(&mut line)?;
            line.trim_end_matches(['\r', '\n']).to_owned()
        } else {
            self.password.clone().context("give --password or --password-stdin")?
        };
        if pw.is_empty() {
            bail!("the password must not be empty");
        }
        Ok(pw)
    }
}

#[derive(clap::Subcommand)]
pub enum UserCommand {
    Add {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        username: String,
        #[arg(long, default_value = "Reader")]
        role: Role,
        #[command(flatten)]
        password: Password,
    },
    Passwd {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        username: String,
        #[command(flatten)]
        password: Password,
    },
    Role {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        username: String,
        #[arg(long)]
        role: Role,
    },
    List {
        #[arg(long)]
        root: PathBuf,
    },
}

pub fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Init { backend, root } => {
            if backend == BackendId::Memory {
                bail!("the memory backend cannot be created on disk");
            }
            create_repository(backend, &root)?;
            println!("created {backend} repository at {}", root.display());
        }
        Command::User(u) => user(u)?,
        Command::ForceClose { root, partition, run } => {
            let repo = crate::open_repo(&root, true)?;
            let h = repo.force_close(&partition, run)?;
            println!(
                "{}/{} closed as {} at {}",
                h.partition,
                h.run_number,
                h.status,
                h.end_time.map(|t| t.to_string()).unwrap_or_default()
            );
        }
        Command::Export { root, out } => {
            let repo = crate::open_repo(&root, false)?;
            match out {
                Some(path) => {
                    let mut f = std::io::BufWriter::new(
                        std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
                    );
                    export_canonical(&*repo, &mut f)?;
                    f.flush()?;
                }
                None => {
                    let mut out = std::io::BufWriter::new(std::io::stdout().lock());
                    export_canonical(&*repo, &mut out)?;
                    out.flush()?;
                }
            }
        }
    }
    Ok(())
}

fn hash(password: &str) -> anyhow::Result<String> {
    hash_password(password, HashParams::default()).map_err(|e| anyhow::anyhow!(e))
}

fn user(cmd: UserCommand) -> anyhow::Result<()> {
    match cmd {
        UserCommand::Add { root, username, role, password } => {
            if !is_valid_username(&username) {
                bail!("invalid username {username:?}");
            }
            let repo = crate::open_repo(&root, true)?;
            if repo.get_user(&username)?.is_some() {
                bail!("user {username:?} already exists");
            }
            let password_hash = hash(&password.read()?)?;
            repo.put_user(&User { username, password_hash, role })?;
        }
        UserCommand::Passwd { root, username, password } => {
            let repo = crate::open_repo(&root, true)?;
            let mut u = repo.get_user(&username)?.with_context(|| format!("no user {username:?}"))?;
            u.password_hash = hash(&password.read()?)?;
            repo.put_user(&u)?;
        }
        UserCommand::Role { root, username, role } => {
            let repo = crate::open_repo(&root, true)?;
            let mut u = repo.get_user(&username)?.with_context(|| format!("no user {username:?}"))?;
            u.role = role;
            repo.put_user(&u)?;
        }
        UserCommand::List { root } => {
            let repo = crate::open_repo(&root, false)?;
            for u in repo.list_users()? {
                println!("{}\t{}", u.username, u.role);
            }
        }
    }
    Ok(())
}
