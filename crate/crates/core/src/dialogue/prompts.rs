//! Prompt templates. The files under `templates/` hold the prompts verbatim,
//! including the chat-format header and end-of-turn markers; placeholders are
//! written `{name}`.

use thiserror::Error;

use crate::game::{bertrand_round_payoff, GameSpec, Player};

pub const RPS_INITIAL: &str = include_str!("../../templates/rps_initial.txt");
pub const RPS_INITIAL_NO_PAPER: &str = include_str!("../../templates/rps_initial_no_paper.txt");
pub const RPS_OTHER_PLAYED: &str = include_str!("../../templates/rps_other_played.txt");
pub const BERTRAND_INITIAL: &str = include_str!("../../templates/bertrand_initial.txt");
pub const BERTRAND_ROUND_RESULT: &str = include_str!("../../templates/bertrand_round_result.txt");
pub const BARGAINING_BUYER: &str = include_str!("../../templates/bargaining_buyer.txt");
pub const BARGAINING_SELLER: &str = include_str!("../../templates/bargaining_seller.txt");
pub const NATURALNESS_JUDGE: &str = include_str!("../../templates/naturalness_judge.txt");
pub const ELICITATION: &str = include_str!("../../templates/elicitation.txt");

const HEADER: &str = "<|start_header_id|>system<|end_header_id|> ";
const FOOTER: &str = " <|eot_id|>";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("no value supplied for placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("unterminated placeholder starting at byte {0}")]
    Unterminated(usize),
}

/// Replaces every `{name}` in `template` with its value. Braces that do not
/// enclose an identifier are copied through untouched.
pub fn fill(template: &str, values: &[(&str, String)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    let mut offset = 0;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let Some(end) = after.find('}') else {
            return Err(PromptError::Unterminated(offset + start));
        };
        let name = &after[..end];
        if !name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            let value = values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| PromptError::MissingPlaceholder(name.to_string()))?;
            out.push_str(value);
        } else {
            out.push('{');
            out.push_str(name);
            out.push('}');
        }
        let consumed = start + 1 + end + 1;
        offset += consumed;
        rest = &rest[consumed..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Strips the system header and end-of-turn marker, leaving the message body
/// sent as chat content.
pub fn chat_content(prompt: &str) -> &str {
    prompt.strip_prefix(HEADER).unwrap_or(prompt).strip_suffix(FOOTER).unwrap_or(prompt)
}

/// Shortest decimal rendering: `70`, `0.2`, `33062.5`.
pub fn format_number(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        let s = format!("{x}");
        s
    }
}

/// Money in results: whole amounts without decimals, otherwise two.
pub fn format_money(x: f64) -> String {
    let rounded = (x * 100.0).round() / 100.0;
    if rounded == rounded.trunc() {
        format!("{}", rounded as i64)
    } else {
        format!("{rounded:.2}")
    }
}

/// Initial setting prompt for `player`. `constrained` picks the no-paper
/// variant when the RPS spec forbids paper for this player.
pub fn render_setting_prompt(spec: &GameSpec, player: Player) -> Result<String, PromptError> {
    let names = [
        ("my_name", player.name().to_string()),
        ("other_name", player.other().name().to_string()),
    ];
    match spec {
        GameSpec::Rps(p) => {
            let template =
                if p.constrained == Some(player) { RPS_INITIAL_NO_PAPER } else { RPS_INITIAL };
            let mut v = names.to_vec();
            v.push(("max_interact", p.max_interactions.to_string()));
            fill(template, &v)
        }
        GameSpec::Bertrand(p) => {
            let mut v = names.to_vec();
            v.push(("max_interact", p.rounds.to_string()));
            v.push(("products", p.product.clone()));
            v.push(("cost", format_number(p.cost)));
            v.push(("demand_den", format_number(p.demand_slope)));
            v.push(("max_price_with_demand", format_number(p.p_max)));
            fill(BERTRAND_INITIAL, &v)
        }
        GameSpec::Bargaining(p) => {
            let mut v = names.to_vec();
            v.push(("max_interact", p.max_interactions.to_string()));
            v.push(("products", p.product.clone()));
            if bargaining_is_buyer(player) {
                v.push(("value", format_number(p.value)));
                fill(BARGAINING_BUYER, &v)
            } else {
                v.push(("cost", format_number(p.cost)));
                fill(BARGAINING_SELLER, &v)
            }
        }
    }
}

/// Player-1 sells, Player-2 buys.
pub fn bargaining_is_buyer(player: Player) -> bool {
    player == Player::Two
}

/// Mid-conversation system events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Injection {
    /// RPS: the opponent has played and the recipient must play now.
    OpponentPlayed,
    /// Bertrand: outcome of the round just finished, from the recipient's side.
    RoundResult { my_price: u32, other_price: u32 },
}

pub fn render_injection(event: Injection, spec: &GameSpec) -> Result<String, PromptError> {
    match event {
        Injection::OpponentPlayed => fill(RPS_OTHER_PLAYED, &[]),
        Injection::RoundResult { my_price, other_price } => {
            let benefit = match spec {
                GameSpec::Bertrand(p) => bertrand_round_payoff(my_price, other_price, p).u_self,
                _ => 0.0,
            };
            fill(
                BERTRAND_ROUND_RESULT,
                &[
                    ("my_price", my_price.to_string()),
                    ("other_price", other_price.to_string()),
                    ("my_benefit", format_money(benefit)),
                ],
            )
        }
    }
}

/// Judge prompt followed by one `Response: "..."` line per talk text.
pub fn render_naturalness_prompt(responses: &[String]) -> String {
    let mut s = NATURALNESS_JUDGE.to_string();
    for r in responses {
        s.push_str(&format!("\nResponse: \"{}\"\nNaturalness score:\n", r.replace('\n', " ")));
    }
    s
}

/// Elicitation instruction appended to a player's view. `subject` is either
/// `your` or `{other_name}'s`.
pub fn render_elicitation(subject: &str, candidates: &[String]) -> String {
    let list = candidates.iter().map(|c| format!("{c}: <probability>")).collect::<Vec<_>>().join("\n");
    fill(ELICITATION, &[("subject", subject.to_string()), ("candidates", list)])
        .expect("elicitation template placeholders")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::GameSpec;

    #[test]
    fn fill_substitutes_and_reports_missing() {
        assert_eq!(fill("a {x} b", &[("x", "1".into())]).unwrap(), "a 1 b");
        assert_eq!(
            fill("a {x} {y}", &[("x", "1".into())]),
            Err(PromptError::MissingPlaceholder("y".into()))
        );
        assert_eq!(fill("{ not a name }", &[]).unwrap(), "{ not a name }");
        assert!(matches!(fill("open {x", &[]), Err(PromptError::Unterminated(5))));
    }

    #[test]
    fn rps_prompt_mentions_interaction_cap() {
        let s = render_setting_prompt(&GameSpec::rps(), Player::Two).unwrap();
        assert!(s.contains("A MAXIMUM OF 5 INTERACTIONS"));
        assert!(s.contains("you, the assistant called Player-2"));
        let c = render_setting_prompt(&GameSpec::rps_constrained(Player::Two), Player::Two).unwrap();
        assert!(c.contains("you can not play paper"));
        let other =
            render_setting_prompt(&GameSpec::rps_constrained(Player::Two), Player::One).unwrap();
        assert!(!other.contains("you can not play paper"));
    }

    #[test]
    fn buyer_prompt_has_harmonic_formula() {
        let s = render_setting_prompt(&GameSpec::bargaining_fixture(), Player::Two).unwrap();
        assert!(s.contains("250(1 + 1/2 + ... + 1/u)"));
        assert!(s.contains("1/2 + ... + 1/u"));
        let seller = render_setting_prompt(&GameSpec::bargaining_fixture(), Player::One).unwrap();
        assert!(seller.contains("Your production cost per unit is $40"));
    }

    #[test]
    fn round_result_injection() {
        let spec = GameSpec::bertrand_fixture();
        let s = render_injection(Injection::RoundResult { my_price: 150, other_price: 110 }, &spec)
            .unwrap();
        assert!(s.contains(
            "Your price this round was $150, user's price was $110. Thus, your benefits are $0. You should now play the next round."
        ));
        let tie = render_injection(Injection::RoundResult { my_price: 150, other_price: 150 }, &spec)
            .unwrap();
        assert!(tie.contains("your benefits are $30000."));
        let fixed = render_injection(Injection::OpponentPlayed, &spec).unwrap();
        assert!(chat_content(&fixed).starts_with("user has played his move."));
    }

    #[test]
    fn chat_content_strips_framing() {
        let s = render_setting_prompt(&GameSpec::rps(), Player::One).unwrap();
        let body = chat_content(&s);
        assert!(body.starts_with("One round of Rock-Paper-Scissors"));
        assert!(body.ends_with("INTERACTIONS EACH."));
    }

    #[test]
    fn money_formatting() {
        assert_eq!(format_money(0.0), "0");
        assert_eq!(format_money(33062.5), "33062.50");
        assert_eq!(format_number(0.2), "0.2");
        assert_eq!(format_number(70.0), "70");
    }
}
