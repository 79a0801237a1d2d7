from pydantic_settings import BaseSettings

class Settings(BaseSettings):
    app_name: str = "opinionbench"
    config_dir: str = "config"
    expert_rules_file: str = "config/expert_rules.yaml"
    runs_dir: str = "runs"
    log_level: str = "INFO"
    default_workers: int = 4
    default_timeout: float = 60.0
    session_ttl_sec: int = 1800
    max_sessions: int = 256
    max_json_candidates: int = 256
    shop_catalog_file: str = "data/catalog.jsonl"
    shop_goal_file: str = "data/shop_goals.jsonl"
    house_task_file: str = "data/house_tasks.jsonl"

    class Config:
        env_prefix = "OPINIONBENCH_"

settings = Settings()
