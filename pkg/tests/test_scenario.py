import pytest

from dosim.errors import ScenarioError
from dosim.kinds import NodeKind
from dosim.scenario import bundled_scenarios, load_bundled, parse_scenario

MINIMAL = """
duration: 10
topology:
  nodes:
    - {id: A}
    - {id: B}
  links:
    - {id: l1, from: A, to: B}
"""


def with_extra(extra):
    return MINIMAL + extra


def test_minimal_document_gets_defaults():
    sc = parse_scenario(MINIMAL)
    assert sc.name == "scenario" and sc.seed == 0 and sc.bus_latency == 0.01
    assert sc.agents.policy.k_confirm == 3 and sc.agents.policy.rule_ttl == 30.0
    t = sc.agents.trust
    assert (t.tau, t.eta, t.alpha, t.theta_mal, t.theta_ben) == (0.5, 0.05, 0.1, 0.3, 0.7)
    link = sc.topology.links[0]
    assert (link.capacity, link.queue_limit, link.latency) == (1000.0, 64, 0.001)
    assert sc.topology.nodes[0].kind is NodeKind.HOST


def test_unknown_node_named():
    doc = with_extra("attacks:\n  - {kind: UdpFlood, sources: [A], victim: ghost, rate: 10}\n")
    with pytest.raises(ScenarioError, match="ghost"):
        parse_scenario(doc)


def test_unknown_key_named():
    with pytest.raises(ScenarioError, match="speling_mistake"):
        parse_scenario(with_extra("speling_mistake: 1\n"))


@pytest.mark.parametrize("doc, needle", [
    ("topology: {nodes: [{id: A}]}\n", "duration"),
    ("duration: 5\n", "topology"),
])
def test_missing_required_key(doc, needle):
    with pytest.raises(ScenarioError, match=needle):
        parse_scenario(doc)


def test_syntax_error_has_position():
    with pytest.raises(ScenarioError, match="line"):
        parse_scenario("duration: [1, 2\ntopology: {")


def test_duplicate_key_rejected():
    with pytest.raises(ScenarioError, match="duplicate key"):
        parse_scenario(with_extra("duration: 20\n"))


@pytest.mark.parametrize("extra", [
    "attacks:\n  - {kind: Shrew, sources: [A], victim: B}\n",
    "attacks:\n  - {kind: Smurf, sources: [A], victim: B, rate: 5}\n",
    "attacks:\n  - {kind: Shrew, sources: [A], victim: B, burst: {period: 1, length: 1, burst_rate: 9}}\n",
    "agents:\n  ns: [{id: n, node: A, dra: d}]\n",
    "agents:\n  trust: {theta_mal: 0.8}\n",
    "agents:\n  dras: [{id: d}, {id: d}]\n",
])
def test_semantic_errors(extra):
    with pytest.raises(ScenarioError):
        parse_scenario(with_extra(extra))


def test_disconnected_topology():
    with pytest.raises(ScenarioError, match="connected"):
        parse_scenario("duration: 1\ntopology: {nodes: [{id: A}, {id: B}]}\n")


def test_non_mapping_document():
    with pytest.raises(ScenarioError):
        parse_scenario("- 1\n- 2\n")


def test_bundled_scenarios_parse():
    names = bundled_scenarios()
    assert {"baseline", "udp_flood", "smurf", "ping_of_death", "land", "reputation", "shrew",
            "roq"} <= set(names)
    for n in names:
        assert load_bundled(n).name == n
    with pytest.raises(ScenarioError):
        load_bundled("nope")
