import pytest
from fastapi.testclient import TestClient

from opinionbench import main
from opinionbench.config import settings
from opinionbench.errors import DataFileError


@pytest.fixture
def client(monkeypatch, shop_files, house_file):
    catalog_path, goals_path = shop_files
    monkeypatch.setattr(settings, "shop_catalog_file", catalog_path)
    monkeypatch.setattr(settings, "shop_goal_file", goals_path)
    monkeypatch.setattr(settings, "house_task_file", house_file)
    main._data_cache.clear()
    main.sessions.clear()
    return TestClient(main.app)


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"ok": True}


def test_shop_session(client, shop_goals):
    r = client.post("/sessions", json={"environment": "shop", "task_index": 2})
    assert r.status_code == 200
    view = r.json()
    assert view["task_id"] == shop_goals[2].goal_id
    assert view["observation"].startswith("Instruction:\n")
    assert [t["name"] for t in view["tools"]] == ["search", "click"]
    assert view["available_actions"] == [f"search {shop_goals[2].instruction}"]

    r = client.post(f"/sessions/{view['session_id']}/step", json={"tool": "search", "tool_input": "mug"})
    assert r.status_code == 200
    assert r.json()["steps_used"] == 1
    assert "Total results:" in r.json()["observation"]

    again = client.get(f"/sessions/{view['session_id']}").json()
    assert again["steps_used"] == 1 and not again["done"]


def test_house_session_finish(client, house_episodes):
    view = client.post("/sessions", json={"environment": "house", "max_steps": 5}).json()
    assert view["task_id"] == house_episodes[0].task.task_id
    assert view["instruction"].startswith("Your task is to: ")
    sid = view["session_id"]

    r = client.post(f"/sessions/{sid}/step", json={"tool": "finish"})
    body = r.json()
    assert body["done"] and body["committed"] and not body["success"]
    assert body["available_actions"] == []

    r = client.post(f"/sessions/{sid}/step", json={"tool": "alfworld_action", "tool_input": "look"})
    assert r.status_code == 409


def test_unknown_tool_is_rejected(client):
    sid = client.post("/sessions", json={"environment": "shop"}).json()["session_id"]
    r = client.post(f"/sessions/{sid}/step", json={"tool": "browse", "tool_input": "x"})
    assert r.status_code == 400
    assert "browse" in r.json()["detail"]
    assert client.get(f"/sessions/{sid}").json()["steps_used"] == 0


def test_unknown_session_and_task(client):
    assert client.get("/sessions/nope").status_code == 404
    assert client.post("/sessions/nope/step", json={"tool": "click"}).status_code == 404
    assert client.post("/sessions", json={"environment": "house", "task_index": 99}).status_code == 404
    assert client.post("/sessions", json={"environment": "garden"}).status_code == 422


def test_missing_data_file(client, monkeypatch, tmp_path):
    monkeypatch.setattr(settings, "house_task_file", str(tmp_path / "absent.jsonl"))
    r = client.post("/sessions", json={"environment": "house"})
    assert r.status_code == 500


def test_loaders_keep_separate_cache_entries(client, house_file):
    assert main._house_tasks(house_file)
    with pytest.raises(DataFileError):
        main._shop_goals(house_file)
