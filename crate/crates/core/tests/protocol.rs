use std::fs;
use std::path::PathBuf;

use gametalk::dialogue::prompts::{render_injection, render_naturalness_prompt, render_setting_prompt, Injection};
use gametalk::dialogue::{
    parse_agent_output, read_jsonl, run_episode, write_jsonl, Conversation, EpisodeOptions,
};
use gametalk::agents::{AgentPolicy, ScriptedAgent, ScriptedKind, TemplatePolicy};
use gametalk::game::{Action, DealMove, GameSpec, Player};
use serde::Deserialize;

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join(rel)
}

fn golden(name: &str) -> String {
    fs::read_to_string(data(&format!("golden/{name}.txt"))).unwrap_or_else(|e| panic!("golden {name}: {e}"))
}

#[test]
fn setting_prompts_match_golden_files() {
    let cases = [
        ("rps_initial_p2", GameSpec::rps(), Player::Two),
        ("rps_initial_no_paper_p2", GameSpec::rps_constrained(Player::Two), Player::Two),
        ("bertrand_initial_p1", GameSpec::bertrand_fixture(), Player::One),
        ("bargaining_seller_p1", GameSpec::bargaining_fixture(), Player::One),
        ("bargaining_buyer_p2", GameSpec::bargaining_fixture(), Player::Two),
    ];
    for (name, spec, player) in cases {
        assert_eq!(render_setting_prompt(&spec, player).unwrap(), golden(name), "{name}");
    }
}

#[test]
fn injections_and_judge_prompt_match_golden_files() {
    let spec = GameSpec::bertrand_fixture();
    assert_eq!(render_injection(Injection::OpponentPlayed, &GameSpec::rps()).unwrap(), golden("rps_other_played"));
    assert_eq!(
        render_injection(Injection::RoundResult { my_price: 150, other_price: 110 }, &spec).unwrap(),
        golden("bertrand_round_result_150_110")
    );
    assert_eq!(render_naturalness_prompt(&[]), golden("naturalness_judge"));
}

#[derive(Deserialize)]
struct FixtureTurn {
    think: String,
    talk: Option<String>,
    play: Option<String>,
}

#[derive(Deserialize)]
struct FixtureConversation {
    name: String,
    game: String,
    turns: Vec<FixtureTurn>,
}

fn spec_for(game: &str) -> GameSpec {
    match game {
        "rps" => GameSpec::rps(),
        "rps_constrained" => GameSpec::rps_constrained(Player::Two),
        "bertrand" => GameSpec::bertrand_fixture(),
        "bargaining" => GameSpec::bargaining_fixture(),
        other => panic!("unknown fixture game {other}"),
    }
}

fn tagged(t: &FixtureTurn) -> String {
    let mut s = format!("<think> {} </think>", t.think);
    if let Some(talk) = &t.talk {
        s += &format!(" <talk> {talk} </talk>");
    }
    if let Some(play) = &t.play {
        s += &format!(" <play> {play} </play>");
    }
    s
}

fn fixtures() -> Vec<FixtureConversation> {
    serde_json::from_str(&fs::read_to_string(data("fixtures/conversations.json")).unwrap()).unwrap()
}

#[test]
fn example_conversations_parse_and_replay() {
    let convs = fixtures();
    assert_eq!(convs.len(), 5);
    for fixture in convs {
        let spec = spec_for(&fixture.game);
        let mut conv = Conversation::new(spec.clone(), 0);
        for (i, t) in fixture.turns.iter().enumerate() {
            let content = parse_agent_output(&tagged(t), spec.kind())
                .unwrap_or_else(|e| panic!("{} turn {i}: {e}", fixture.name));
            assert_eq!(content.talk.as_deref(), t.talk.as_deref().map(str::trim), "{} turn {i}", fixture.name);
            let player = conv.next_player();
            conv.step(player, content, false).unwrap_or_else(|e| panic!("{} turn {i}: {e}", fixture.name));
        }
        assert!(conv.is_terminal(), "{} should end", fixture.name);
    }
}

#[test]
fn paper_style_actions_parse() {
    assert_eq!("$150".parse::<Action>().unwrap().to_string(), "$150");
    let deal: Action = "15 units at $8.33 each".parse().unwrap();
    assert_eq!(deal, Action::Deal(DealMove::Propose { units: 15, price: gametalk::game::Cents(833) }));
    assert_eq!("accept".parse::<Action>().unwrap(), Action::Deal(DealMove::Accept));

    let bargaining = fixtures().into_iter().find(|c| c.game == "bargaining").unwrap();
    let mut conv = Conversation::new(GameSpec::bargaining_fixture(), 0);
    for t in &bargaining.turns {
        let content = parse_agent_output(&tagged(t), conv.spec.kind()).unwrap();
        let p = conv.next_player();
        conv.step(p, content, false).unwrap();
    }
    assert_eq!(conv.agreed_deal(), Some((15, 8.33)));
}

#[test]
fn episode_jsonl_round_trip_is_lossless() {
    let opponents: Vec<(GameSpec, Box<dyn AgentPolicy>)> = vec![
        (GameSpec::rps(), Box::new(ScriptedAgent::hint_responsive(0.6).unwrap())),
        (GameSpec::bertrand_fixture(), Box::new(ScriptedAgent::new(ScriptedKind::BertrandTitForTat).unwrap())),
        (
            GameSpec::bargaining_fixture(),
            Box::new(ScriptedAgent::new(ScriptedKind::BargainingConcession { rate: 0.3 }).unwrap()),
        ),
    ];
    let mut episodes = Vec::new();
    for (i, (spec, opp)) in opponents.iter().enumerate() {
        let policy = TemplatePolicy::<f64>::new(spec.kind(), 5.0);
        let elicit = (spec.kind() != gametalk::game::GameKind::Bargaining).then_some(Player::Two);
        let opts = EpisodeOptions { elicit_for: elicit, episode_id: format!("e{i}"), ..EpisodeOptions::default() };
        episodes.push(run_episode(spec, [opp.as_ref(), &policy], 11 + i as u64, &opts).unwrap());
    }
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &episodes).unwrap();
    let back = read_jsonl(&buf[..]).unwrap();
    assert_eq!(back, episodes);
    let mut again = Vec::new();
    write_jsonl(&mut again, &back).unwrap();
    assert_eq!(again, buf);
    assert!(!episodes[0].elicitations.is_empty());
}
