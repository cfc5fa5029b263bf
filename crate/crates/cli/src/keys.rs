use std::fs;
use std::path::Path;

use pom_core::crypto::{Account, KeyPair};

use crate::CliError;

const KEY_MAGIC: &str = "pom-key 1";

pub fn encode_key(key: &KeyPair) -> String {
    format!(
        "{KEY_MAGIC}\naccount {}\nsecret {}\n",
        key.account(),
        hex::encode(key.secret())
    )
}

pub fn decode_key(text: &str) -> Result<KeyPair, String> {
    let mut lines = text.lines();
    if lines.next() != Some(KEY_MAGIC) {
        return Err("not a key file".into());
    }
    let field = |line: Option<&str>, name: &str| -> Result<String, String> {
        line.and_then(|l| l.strip_prefix(name))
            .and_then(|l| l.strip_prefix(' '))
            .map(str::to_owned)
            .ok_or_else(|| format!("missing `{name}` line"))
    };
    let account: Account = field(lines.next(), "account")?.parse().map_err(|e| format!("{e}"))?;
    let secret = hex::decode(field(lines.next(), "secret")?).map_err(|e| e.to_string())?;
    if lines.next().is_some() {
        return Err("trailing data".into());
    }
    let key = KeyPair::from_secret(&secret).map_err(|e| e.to_string())?;
    if key.account() != account {
        return Err("account does not match secret".into());
    }
    Ok(key)
}

pub fn load_key(path: &Path) -> Result<KeyPair, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    decode_key(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_file_round_trip() {
        let key = KeyPair::from_seed_label("alice");
        let back = decode_key(&encode_key(&key)).unwrap();
        assert_eq!(back.account(), key.account());
        let other = KeyPair::from_seed_label("bob").account().to_string();
        let tampered = encode_key(&key).replace(&key.account().to_string(), &other);
        assert!(decode_key(&tampered).is_err());
        assert!(decode_key("pom-key 1\n").is_err());
    }
}
